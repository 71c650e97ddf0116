//! The toy benchmark end to end: field data, on-site and global surrogates,
//! their out-of-sample RMSEs, modular calibration and posterior sampling.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::calib::{
    default_sigma, diagnostics, mcmc, modular_optimize, tune_proposal, ChainDiagnostics, ModularSolution,
    PosteriorChain, PriorSpec,
};
use crate::design::{default_maximin_iters, maximin_lhs};
use crate::error::Result;
use crate::gp::FitConfig;
use crate::io::{create, fmt_f64, write_json};
use crate::koh::JointPrecompute;
use crate::oss::{build_bank, build_global, flop_parity, rmse_eval, BankConfig, GlobalSurrogate, RmseReport, SurrogateBank, SurrogateRef};
use crate::seeds::{derive_seed, stream};
use crate::sim::{gen_field, FieldDataset, ToySimulator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub seed: u64,
    pub n_field: usize,
    pub noise_sd: f64,
    pub n_per_site: usize,
    pub n_global: usize,
    pub n_test_per_site: usize,
    pub onsite_restarts: usize,
    pub global_restarts: usize,
    pub bias_restarts: usize,
    pub modular_restarts: usize,
    pub prior: PriorSpec,
    pub mcmc_t: usize,
    pub pilot_sweeps: usize,
    pub burn_in: f64,
    /// Initial proposal scales; empty means the default for `p_u`.
    pub sigma: Vec<f64>,
    /// Skip the global comparator (and its RMSEs).
    pub skip_global: bool,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            n_field: 10,
            noise_sd: 0.02,
            n_per_site: 200,
            n_global: 500,
            n_test_per_site: 200,
            onsite_restarts: 5,
            global_restarts: 30,
            bias_restarts: 5,
            modular_restarts: 50,
            prior: PriorSpec::Uniform,
            mcmc_t: 20_000,
            pilot_sweeps: 2000,
            burn_in: 0.2,
            sigma: Vec::new(),
            skip_global: false,
        }
    }
}

impl ToyConfig {
    pub const P_U: usize = 2;

    pub fn field_seed(&self) -> u64 {
        derive_seed(self.seed, stream::FIELD)
    }

    pub fn bank_config(&self) -> BankConfig {
        let bank_seed = derive_seed(self.seed, stream::OSS_TRAIN);
        let mut cfg = BankConfig::new(self.n_per_site, Self::P_U, bank_seed);
        cfg.fit.restarts = self.onsite_restarts;
        cfg
    }

    pub fn global_fit(&self) -> FitConfig {
        FitConfig::global(derive_seed(derive_seed(self.seed, stream::GLOBAL_TRAIN), stream::GP_FIT))
            .with_restarts(self.global_restarts)
    }

    pub fn bias_fit(&self) -> FitConfig {
        FitConfig::onsite(derive_seed(derive_seed(self.seed, stream::MODULAR), stream::GP_FIT))
            .with_restarts(self.bias_restarts)
    }

    pub fn test_seed(&self) -> u64 {
        derive_seed(self.seed, stream::OSS_TEST)
    }

    pub fn sigma0(&self) -> Vec<f64> {
        if self.sigma.is_empty() {
            default_sigma(Self::P_U)
        } else {
            self.sigma.clone()
        }
    }
}

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Timing {
    pub field: f64,
    pub bank: f64,
    pub global: f64,
    pub rmse: f64,
    pub modular: f64,
    pub pilot: f64,
    pub mcmc: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct ToyRun {
    pub config: ToyConfig,
    pub field: FieldDataset,
    pub bank: SurrogateBank,
    pub global: Option<GlobalSurrogate>,
    pub rmse_oss: RmseReport,
    pub rmse_global: Option<RmseReport>,
    pub modular: Vec<ModularSolution>,
    pub chain: PosteriorChain,
    pub diagnostics: ChainDiagnostics,
    pub timing: Timing,
}

/// Field data and surrogates only (the first half of [`run_toy`]).
pub fn toy_surrogates(cfg: &ToyConfig) -> Result<(FieldDataset, SurrogateBank, Option<GlobalSurrogate>)> {
    let sim = ToySimulator::default();
    let field = gen_field(cfg.n_field, cfg.noise_sd, cfg.field_seed())?;
    let bank = build_bank(&field, &sim, &cfg.bank_config())?;
    let global = toy_global(cfg)?;
    Ok((field, bank, global))
}

/// The global comparator, fit on a maximin LHS over `(x, u)`.
pub fn toy_global(cfg: &ToyConfig) -> Result<Option<GlobalSurrogate>> {
    if cfg.skip_global {
        return Ok(None);
    }
    let d = 1 + ToyConfig::P_U;
    let gseed = derive_seed(cfg.seed, stream::GLOBAL_TRAIN);
    let design = maximin_lhs(cfg.n_global, d, gseed, default_maximin_iters(cfg.n_global, d))?;
    Ok(Some(build_global(&design, &ToySimulator::default(), &cfg.global_fit())?))
}

pub fn run_toy(cfg: &ToyConfig) -> Result<ToyRun> {
    let sim = ToySimulator::default();
    let t0 = Instant::now();
    let mut timing = Timing::default();
    let mut lap = Instant::now();
    let mut tick = |slot: &mut f64| {
        *slot = lap.elapsed().as_secs_f64();
        lap = Instant::now();
    };

    let field = gen_field(cfg.n_field, cfg.noise_sd, cfg.field_seed())?;
    tick(&mut timing.field);
    let bank = build_bank(&field, &sim, &cfg.bank_config())?;
    tick(&mut timing.bank);
    log::info!(
        "bank: {} of {} runs converged",
        bank.total_runs(),
        bank.total_requested()
    );
    let global = toy_global(cfg)?;
    tick(&mut timing.global);

    let rmse_oss = rmse_eval(SurrogateRef::Bank(&bank), &field, cfg.n_test_per_site, &sim, cfg.test_seed())?;
    let rmse_global = global
        .as_ref()
        .map(|g| rmse_eval(SurrogateRef::Global(&g.gp), &field, cfg.n_test_per_site, &sim, cfg.test_seed()))
        .transpose()?;
    tick(&mut timing.rmse);

    let modular = modular_optimize(
        &bank,
        &cfg.prior,
        &cfg.bias_fit(),
        cfg.modular_restarts,
        derive_seed(cfg.seed, stream::MODULAR),
    )?;
    tick(&mut timing.modular);
    let best = &modular[0];
    log::info!("modular calibration: u = {:?}, score {}", best.u, best.log_score);

    let pre = JointPrecompute::new(&bank, &best.phi_b)?;
    let loglik = |u: &[f64]| pre.loglik(u);
    let (sigma, u_start) = if cfg.pilot_sweeps > 0 {
        tune_proposal(
            &loglik,
            &cfg.prior,
            &cfg.sigma0(),
            cfg.pilot_sweeps,
            &best.u,
            derive_seed(cfg.seed, stream::PILOT),
        )?
    } else {
        (cfg.sigma0(), best.u.clone())
    };
    tick(&mut timing.pilot);
    let chain = mcmc(&pre, &cfg.prior, &sigma, cfg.mcmc_t, &u_start, derive_seed(cfg.seed, stream::MCMC))?;
    tick(&mut timing.mcmc);
    let diagnostics = diagnostics(&chain, cfg.burn_in)?;
    timing.total = t0.elapsed().as_secs_f64();

    Ok(ToyRun {
        config: cfg.clone(),
        field,
        bank,
        global,
        rmse_oss,
        rmse_global,
        modular,
        chain,
        diagnostics,
        timing,
    })
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_else(|| "NA".into())
}

/// CSV with one row per site: `site,oss_rmse,global_rmse,oss_n_test,global_n_test`.
pub fn write_rmse_compare(path: &Path, oss: &RmseReport, global: Option<&RmseReport>) -> Result<()> {
    let mut wr = csv::Writer::from_writer(create(path)?);
    wr.write_record(["site", "oss_rmse", "global_rmse", "oss_n_test", "global_n_test"])?;
    for i in 0..oss.per_site.len() {
        wr.write_record([
            (i + 1).to_string(),
            opt_cell(oss.per_site[i]),
            opt_cell(global.and_then(|g| g.per_site[i])),
            oss.n_test[i].to_string(),
            global.map(|g| g.n_test[i].to_string()).unwrap_or_else(|| "NA".into()),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// CSV of the ranked modular solutions: `rank,u_1..u_p,log_score,converged`.
pub fn write_modular_csv(path: &Path, sols: &[ModularSolution]) -> Result<()> {
    let p = sols.first().map_or(0, |s| s.u.len());
    let mut wr = csv::Writer::from_writer(create(path)?);
    let mut header = vec!["rank".to_string()];
    header.extend((1..=p).map(|j| format!("u_{j}")));
    header.extend(["log_score".to_string(), "converged".to_string()]);
    wr.write_record(&header)?;
    for (r, s) in sols.iter().enumerate() {
        let mut rec = vec![(r + 1).to_string()];
        rec.extend(s.u.iter().map(|&v| fmt_f64(v)));
        rec.push(fmt_f64(s.log_score));
        rec.push(u8::from(s.converged).to_string());
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapRecord {
    pub u_map: Vec<f64>,
    pub map_logpost: f64,
    pub modular_u: Vec<f64>,
    pub modular_log_score: f64,
    pub phi_b: crate::gp::KernelHyperparams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_true: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub n_requested_oss: usize,
    pub n_converged_oss: usize,
    pub oss_missing_fraction: f64,
    pub n_requested_global: Option<usize>,
    pub n_converged_global: Option<usize>,
    pub global_missing_fraction: Option<f64>,
    pub oss_rmse_median: f64,
    pub oss_rmse_mean: f64,
    pub global_rmse_median: Option<f64>,
    pub global_rmse_mean: Option<f64>,
    /// Cubic flop counts of one global fit versus all on-site fits.
    pub flops_global: f64,
    pub flops_oss: f64,
}

impl ToyRun {
    pub fn summary(&self) -> RunSummary {
        let (fg, fo) = flop_parity(self.config.n_global, &self.bank);
        RunSummary {
            n_requested_oss: self.bank.total_requested(),
            n_converged_oss: self.bank.total_runs(),
            oss_missing_fraction: self.bank.missing_fraction(),
            n_requested_global: self.global.as_ref().map(|g| g.n_requested),
            n_converged_global: self.global.as_ref().map(|g| g.n_converged()),
            global_missing_fraction: self.global.as_ref().map(|g| g.missing_fraction()),
            oss_rmse_median: self.rmse_oss.median(),
            oss_rmse_mean: self.rmse_oss.mean(),
            global_rmse_median: self.rmse_global.as_ref().map(|r| r.median()),
            global_rmse_mean: self.rmse_global.as_ref().map(|r| r.mean()),
            flops_global: fg,
            flops_oss: fo,
        }
    }

    pub fn map_record(&self) -> MapRecord {
        let best = &self.modular[0];
        MapRecord {
            u_map: self.diagnostics.map.clone(),
            map_logpost: self.diagnostics.map_logpost,
            modular_u: best.u.clone(),
            modular_log_score: best.log_score,
            phi_b: best.phi_b.clone(),
            u_true: Some(crate::sim::TOY_U_TRUE.to_vec()),
        }
    }

    /// Writes every artifact of the run into `dir`; returns the file names
    /// written.
    pub fn write_artifacts(&self, dir: &Path) -> Result<Vec<String>> {
        std::fs::create_dir_all(dir)?;
        self.field.write_csv(create(&dir.join("field.csv"))?)?;
        self.bank.save(&dir.join("bank"))?;
        if let Some(g) = &self.global {
            write_json(&dir.join("global_hp.json"), &g.gp.record())?;
        }
        write_rmse_compare(&dir.join("rmse_compare.csv"), &self.rmse_oss, self.rmse_global.as_ref())?;
        write_modular_csv(&dir.join("modular.csv"), &self.modular)?;
        self.chain.write_csv(create(&dir.join("posterior_samples.csv"))?)?;
        write_json(&dir.join("posterior_summary.json"), &self.diagnostics)?;
        write_json(&dir.join("map.json"), &self.map_record())?;
        write_json(&dir.join("summary.json"), &self.summary())?;
        write_json(&dir.join("timing.json"), &self.timing)?;
        let mut files = vec![
            "field.csv",
            "bank/bank.json",
            "rmse_compare.csv",
            "modular.csv",
            "posterior_samples.csv",
            "posterior_summary.json",
            "map.json",
            "summary.json",
            "timing.json",
        ];
        if self.global.is_some() {
            files.push("global_hp.json");
        }
        Ok(files.into_iter().map(String::from).collect())
    }
}
