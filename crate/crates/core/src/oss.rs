//! On-site surrogates: one small GP per field site, trained over
//! calibration-parameter space only on the simulator runs that converged at
//! that site. Also the global `(x, u)`-space comparator and the out-of-sample
//! RMSE protocol used to compare them.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{default_maximin_iters, maximin_lhs, DesignMatrix};
use crate::error::{Error, Result};
use crate::gp::{fit_mle, FitConfig, FittedGP, HyperparamRecord};
use crate::io::{create, open, read_json, write_column_csv, write_json};
use crate::seeds::{derive_seed, stream};
use crate::sim::{FieldDataset, Simulator};

/// How a bank of on-site surrogates is designed and fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BankConfig {
    pub n_per_site: usize,
    /// Dimension of the calibration parameter `u`.
    pub p_u: usize,
    pub seed: u64,
    /// Maximin swap budget per site design; `None` uses `100 · n · p_u`.
    pub maximin_iters: Option<usize>,
    pub fit: FitConfig,
}

impl BankConfig {
    pub fn new(n_per_site: usize, p_u: usize, seed: u64) -> Self {
        Self {
            n_per_site,
            p_u,
            seed,
            maximin_iters: None,
            fit: FitConfig::onsite(derive_seed(seed, stream::GP_FIT)),
        }
    }
}

/// One site's surrogate. `gp.inputs` is `U_i` (converged rows only) and
/// `gp.outputs` is `y_i`.
#[derive(Debug, Clone)]
pub struct OnSiteSurrogate {
    pub gp: FittedGP,
    pub n_requested: usize,
    pub seed: u64,
}

impl OnSiteSurrogate {
    pub fn n(&self) -> usize {
        self.gp.n()
    }
}

#[derive(Debug, Clone)]
pub struct SurrogateBank {
    pub field: FieldDataset,
    pub sites: Vec<OnSiteSurrogate>,
    pub p_u: usize,
    pub n_per_site: usize,
    pub master_seed: u64,
}

/// Bank manifest stored as `bank.json`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BankManifest {
    pub field_hash: String,
    pub n_sites: usize,
    pub p_u: usize,
    pub n_per_site: usize,
    pub master_seed: u64,
    pub site_seeds: Vec<u64>,
    pub n_requested: Vec<usize>,
    pub n_converged: Vec<usize>,
    pub total_requested: usize,
    pub total_converged: usize,
}

impl SurrogateBank {
    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    /// `N_M = Σ n_i`, the number of converged runs across all sites.
    pub fn total_runs(&self) -> usize {
        self.sites.iter().map(|s| s.n()).sum()
    }

    pub fn total_requested(&self) -> usize {
        self.sites.iter().map(|s| s.n_requested).sum()
    }

    pub fn missing_fraction(&self) -> f64 {
        let req = self.total_requested();
        if req == 0 {
            0.0
        } else {
            (req - self.total_runs()) as f64 / req as f64
        }
    }

    /// Sub-bank of the given sites, in the given order.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            field: self.field.select(idx),
            sites: idx.iter().map(|&i| self.sites[i].clone()).collect(),
            p_u: self.p_u,
            n_per_site: self.n_per_site,
            master_seed: self.master_seed,
        }
    }

    /// Predictive mean and variance of site `site`'s surrogate at `u`
    /// (sites are 0-based).
    pub fn emulate(&self, site: usize, u: &[f64]) -> Result<(f64, f64)> {
        let s = self.sites.get(site).ok_or_else(|| {
            Error::invalid(format!("site index {site} out of range (bank has {})", self.len()))
        })?;
        s.gp.predict_point(u)
    }

    /// Predictive means of every site at a common `u`.
    pub fn emulate_means(&self, u: &[f64]) -> Vec<f64> {
        self.sites.iter().map(|s| s.gp.predict_mean(u)).collect()
    }

    pub fn manifest(&self) -> BankManifest {
        BankManifest {
            field_hash: self.field.hash(),
            n_sites: self.len(),
            p_u: self.p_u,
            n_per_site: self.n_per_site,
            master_seed: self.master_seed,
            site_seeds: self.sites.iter().map(|s| s.seed).collect(),
            n_requested: self.sites.iter().map(|s| s.n_requested).collect(),
            n_converged: self.sites.iter().map(|s| s.n()).collect(),
            total_requested: self.total_requested(),
            total_converged: self.total_runs(),
        }
    }

    /// Writes `U_i.csv`, `y_i.csv`, `hp_i.json` (1-based `i`) and `bank.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (i, s) in self.sites.iter().enumerate() {
            let k = i + 1;
            s.gp.inputs.write_csv(create(&dir.join(format!("U_{k}.csv")))?)?;
            let ys: Vec<Option<f64>> = s.gp.outputs.iter().map(|&v| Some(v)).collect();
            write_column_csv(&dir.join(format!("y_{k}.csv")), "y", &ys)?;
            write_json(&dir.join(format!("hp_{k}.json")), &s.gp.record())?;
        }
        write_json(&dir.join("bank.json"), &self.manifest())
    }

    /// Loads a bank saved by [`SurrogateBank::save`]; the field dataset must
    /// hash to the recorded value.
    pub fn load(dir: &Path, field: &FieldDataset) -> Result<Self> {
        let manifest: BankManifest = read_json(&dir.join("bank.json"))?;
        if manifest.field_hash != field.hash() {
            return Err(Error::Config(format!(
                "bank at {} was built for a different field dataset",
                dir.display()
            )));
        }
        if manifest.n_sites != field.len() {
            return Err(Error::Config("bank/field site count mismatch".into()));
        }
        let mut sites = Vec::with_capacity(manifest.n_sites);
        for i in 0..manifest.n_sites {
            let k = i + 1;
            let u = DesignMatrix::read_csv(open(&dir.join(format!("U_{k}.csv")))?)?;
            let y = crate::sim::SimResult::read_csv(open(&dir.join(format!("y_{k}.csv")))?)?;
            let y: Vec<f64> = y
                .values
                .into_iter()
                .enumerate()
                .map(|(row, v)| {
                    v.ok_or(Error::Parse {
                        row: row + 1,
                        message: format!("y_{k}.csv contains a missing value"),
                    })
                })
                .collect::<Result<_>>()?;
            let rec: HyperparamRecord = read_json(&dir.join(format!("hp_{k}.json")))?;
            let gp = FittedGP::from_record(u, y, &rec)?;
            sites.push(OnSiteSurrogate {
                gp,
                n_requested: manifest.n_requested[i],
                seed: manifest.site_seeds[i],
            });
        }
        Ok(Self {
            field: field.clone(),
            sites,
            p_u: manifest.p_u,
            n_per_site: manifest.n_per_site,
            master_seed: manifest.master_seed,
        })
    }
}

fn build_site(
    i: usize,
    x: &[f64],
    sim: &dyn Simulator,
    config: &BankConfig,
) -> Result<OnSiteSurrogate> {
    let seed = derive_seed(config.seed, i as u64);
    let iters = config
        .maximin_iters
        .unwrap_or_else(|| default_maximin_iters(config.n_per_site, config.p_u));
    let design = maximin_lhs(config.n_per_site, config.p_u, seed, iters)?;
    let res = sim.simulate(&design.with_prefix(x))?;
    let keep: Vec<usize> = (0..res.n_requested).filter(|&r| res.values[r].is_some()).collect();
    if keep.len() < 2 {
        return Err(Error::SiteStarvation {
            site: i,
            converged: keep.len(),
        });
    }
    let u = design.select_rows(&keep);
    let y: Vec<f64> = keep.iter().map(|&r| res.values[r].unwrap()).collect();
    let fit = FitConfig {
        seed: derive_seed(config.fit.seed, i as u64),
        ..config.fit.clone()
    };
    let gp = fit_mle(&u, &y, &fit)?;
    Ok(OnSiteSurrogate {
        gp,
        n_requested: config.n_per_site,
        seed,
    })
}

/// Designs, simulates and fits one surrogate per field site. Sites are
/// processed in parallel; site `i` depends only on its own seed.
pub fn build_bank(field: &FieldDataset, sim: &dyn Simulator, config: &BankConfig) -> Result<SurrogateBank> {
    if config.n_per_site < 2 {
        return Err(Error::invalid("need at least 2 runs per site"));
    }
    let sites = (0..field.len())
        .into_par_iter()
        .map(|i| build_site(i, field.site(i), sim, config))
        .collect::<Result<Vec<_>>>()?;
    Ok(SurrogateBank {
        field: field.clone(),
        sites,
        p_u: config.p_u,
        n_per_site: config.n_per_site,
        master_seed: config.seed,
    })
}

/// A single GP over the joint `(x, u)` space.
#[derive(Debug, Clone)]
pub struct GlobalSurrogate {
    pub gp: FittedGP,
    pub n_requested: usize,
}

impl GlobalSurrogate {
    pub fn n_converged(&self) -> usize {
        self.gp.n()
    }

    pub fn missing_fraction(&self) -> f64 {
        if self.n_requested == 0 {
            0.0
        } else {
            1.0 - self.n_converged() as f64 / self.n_requested as f64
        }
    }
}

/// Fits the global comparator on the converged runs of `design`.
pub fn build_global(design: &DesignMatrix, sim: &dyn Simulator, fit: &FitConfig) -> Result<GlobalSurrogate> {
    let res = sim.simulate(design)?;
    let keep: Vec<usize> = (0..res.n_requested).filter(|&r| res.values[r].is_some()).collect();
    if keep.len() < 2 {
        return Err(Error::SiteStarvation {
            site: 0,
            converged: keep.len(),
        });
    }
    let x = design.select_rows(&keep);
    let y: Vec<f64> = keep.iter().map(|&r| res.values[r].unwrap()).collect();
    Ok(GlobalSurrogate {
        gp: fit_mle(&x, &y, fit)?,
        n_requested: design.nrows(),
    })
}

/// Cubic flop counts `(global, on-site)` of the two emulation strategies.
pub fn flop_parity(global_runs: usize, bank: &SurrogateBank) -> (f64, f64) {
    let g = (global_runs as f64).powi(3);
    let o = bank.sites.iter().map(|s| (s.n_requested as f64).powi(3)).sum();
    (g, o)
}

/// Either kind of surrogate, for the shared RMSE protocol.
#[derive(Debug, Clone, Copy)]
pub enum SurrogateRef<'a> {
    Bank(&'a SurrogateBank),
    Global(&'a FittedGP),
}

/// Per-site out-of-sample RMSEs. `None` marks a site excluded because none
/// of its test runs converged.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RmseReport {
    pub per_site: Vec<Option<f64>>,
    pub n_test: Vec<usize>,
    pub excluded: Vec<usize>,
}

impl RmseReport {
    pub fn values(&self) -> Vec<f64> {
        self.per_site.iter().flatten().copied().collect()
    }

    pub fn median(&self) -> f64 {
        crate::stats::quantile(&self.values(), 0.5)
    }

    pub fn mean(&self) -> f64 {
        let v = self.values();
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Test design used at site `i`; identical for every surrogate evaluated
/// with the same seed.
pub fn test_design(n_test: usize, p_u: usize, seed: u64, site: usize) -> Result<DesignMatrix> {
    maximin_lhs(n_test, p_u, derive_seed(seed, site as u64), default_maximin_iters(n_test, p_u))
}

/// Out-of-sample RMSE at each field site over a fresh maximin LHS in
/// `u`-space; runs that fail to converge are dropped.
pub fn rmse_eval(
    surrogate: SurrogateRef<'_>,
    field: &FieldDataset,
    n_test_per_site: usize,
    sim: &dyn Simulator,
    seed: u64,
) -> Result<RmseReport> {
    if n_test_per_site < 2 {
        return Err(Error::invalid("need at least 2 test runs per site"));
    }
    let p_u = match surrogate {
        SurrogateRef::Bank(b) => b.p_u,
        SurrogateRef::Global(gp) => gp.dim() - field.px(),
    };
    let rows = (0..field.len())
        .into_par_iter()
        .map(|i| -> Result<(Option<f64>, usize)> {
            let x = field.site(i);
            let design = test_design(n_test_per_site, p_u, seed, i)?;
            let res = sim.simulate(&design.with_prefix(x))?;
            let mut sse = 0.0;
            let mut count = 0;
            for (r, v) in res.values.iter().enumerate() {
                let Some(truth) = v else { continue };
                let u = design.row(r);
                let pred = match surrogate {
                    SurrogateRef::Bank(b) => b.sites[i].gp.predict_mean(u),
                    SurrogateRef::Global(gp) => {
                        let xu: Vec<f64> = x.iter().chain(u).copied().collect();
                        gp.predict_mean(&xu)
                    }
                };
                sse += (pred - truth).powi(2);
                count += 1;
            }
            Ok(((count > 0).then(|| (sse / count as f64).sqrt()), count))
        })
        .collect::<Result<Vec<_>>>()?;
    let excluded: Vec<usize> = rows
        .iter()
        .enumerate()
        .filter(|(_, (r, _))| r.is_none())
        .map(|(i, _)| i)
        .collect();
    for &i in &excluded {
        log::warn!("site {i}: no converged test runs, excluded from RMSE");
    }
    Ok(RmseReport {
        per_site: rows.iter().map(|(r, _)| *r).collect(),
        n_test: rows.iter().map(|(_, n)| *n).collect(),
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{gen_field, ToySimulator};

    fn small_bank(missing: bool, seed: u64) -> SurrogateBank {
        let field = gen_field(4, 0.02, seed).unwrap();
        let cfg = BankConfig::new(40, 2, seed);
        build_bank(&field, &ToySimulator { missingness: missing }, &cfg).unwrap()
    }

    #[test]
    fn no_missingness_keeps_every_run() {
        let bank = small_bank(false, 3);
        assert!(bank.sites.iter().all(|s| s.n() == 40));
        assert_eq!(bank.total_runs(), 160);
    }

    #[test]
    fn rebuild_is_identical() {
        let a = small_bank(true, 5);
        let b = small_bank(true, 5);
        for (sa, sb) in a.sites.iter().zip(&b.sites) {
            assert_eq!(sa.gp.record(), sb.gp.record());
        }
        assert_eq!(a.manifest(), b.manifest());
    }

    #[test]
    fn totals_account_for_missing_runs() {
        let bank = small_bank(true, 7);
        let m = bank.manifest();
        assert_eq!(m.total_converged, m.n_converged.iter().sum::<usize>());
        assert!(m.total_converged <= m.total_requested);
    }

    #[test]
    fn emulate_delegates_to_site_gp() {
        let bank = small_bank(true, 2);
        let u = [0.3, 0.6];
        let (m, v) = bank.emulate(1, &u).unwrap();
        let (m2, v2) = bank.sites[1].gp.predict_point(&u).unwrap();
        assert_eq!((m, v), (m2, v2));
        assert!(bank.emulate(4, &u).is_err());
        // a training row is reproduced
        let row = bank.sites[0].gp.inputs.row(0).to_vec();
        let y0 = bank.sites[0].gp.outputs[0];
        let (m0, _) = bank.emulate(0, &row).unwrap();
        assert!((m0 - y0).abs() <= 1e-4 * y0.abs().max(1e-2));
    }

    #[test]
    fn starvation_names_the_site() {
        struct AllMissing;
        impl Simulator for AllMissing {
            fn simulate(&self, inputs: &DesignMatrix) -> Result<crate::sim::SimResult> {
                Ok(crate::sim::SimResult::new(vec![None; inputs.nrows()]))
            }
        }
        let field = gen_field(3, 0.0, 1).unwrap();
        match build_bank(&field, &AllMissing, &BankConfig::new(10, 2, 1)) {
            Err(Error::SiteStarvation { site, converged }) => {
                assert_eq!(site, 0);
                assert_eq!(converged, 0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn site_fit_depends_only_on_its_own_index() {
        // permuting field sites does not change a given site's surrogate as
        // long as its index (and so its seed) is the same
        let field = gen_field(3, 0.02, 9).unwrap();
        let cfg = BankConfig::new(30, 2, 9);
        let full = build_bank(&field, &ToySimulator::default(), &cfg).unwrap();
        let sub = build_site(2, field.site(2), &ToySimulator::default(), &cfg).unwrap();
        assert_eq!(full.sites[2].gp.record(), sub.gp.record());
    }

    #[test]
    fn save_load_round_trip() {
        let bank = small_bank(true, 4);
        let dir = tempfile::tempdir().unwrap();
        bank.save(dir.path()).unwrap();
        let back = SurrogateBank::load(dir.path(), &bank.field).unwrap();
        for (a, b) in bank.sites.iter().zip(&back.sites) {
            assert_eq!(a.gp.record(), b.gp.record());
            assert_eq!(a.gp.alpha, b.gp.alpha);
        }
        let other = gen_field(4, 0.02, 99).unwrap();
        assert!(SurrogateBank::load(dir.path(), &other).is_err());
    }

    #[test]
    fn in_sample_rmse_is_tiny_with_nugget_at_floor() {
        let bank = small_bank(false, 6);
        for s in &bank.sites {
            let mut hp = s.gp.hyperparams.clone();
            hp.eta = crate::gp::ETA_MIN;
            let gp = FittedGP::new(s.gp.inputs.clone(), s.gp.outputs.clone(), hp, 0.0).unwrap();
            let (m, _) = gp.predict(&gp.inputs).unwrap();
            let rmse = (m.iter().zip(&s.gp.outputs).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
                / m.len() as f64)
                .sqrt();
            assert!(rmse <= 1e-3, "rmse {rmse} eta {}", gp.hyperparams.eta);
        }
    }
}
