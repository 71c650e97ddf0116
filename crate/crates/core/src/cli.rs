//! Command-line front end and the flat-file run store.
//!
//! Every command reads a JSON config (plus flag and `key=value` overrides),
//! writes its artifacts into `<store>/<name>/` and records a `manifest.json`
//! there. Upstream artifacts are referenced by paths relative to the store.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::calib::{diagnostics, mcmc, modular_optimize, read_chain_csv, tune_proposal, PriorSpec};
use crate::design::{default_maximin_iters, lhs, maximin_lhs, DesignMatrix};
use crate::error::{Error, Result};
use crate::io::{create, fmt_f64, open, read_json, write_json};
use crate::koh::{in_sample_predict, loo_predict, predict_over_samples, JointPrecompute, LooMode};
use crate::oss::{build_bank, SurrogateBank};
use crate::pipeline::{run_toy, write_modular_csv, MapRecord, ToyConfig};
use crate::seeds::{derive_seed, stream};
use crate::sim::{batch_simulate, gen_field, BatchAdapter, FieldDataset, Simulator, ToySimulator};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "osscal", version, about = "Calibration with on-site GP surrogates")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// JSON config file; omitted means all defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker thread cap (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long, default_value = ".")]
    pub store: PathBuf,
    /// Rerun even if a completed run with the same config hash exists.
    #[arg(long)]
    pub force: bool,
    /// `key=value` config overrides; dotted keys reach nested objects and
    /// values are parsed as JSON, falling back to plain strings.
    pub overrides: Vec<String>,
}

impl RunArgs {
    pub fn new(store: impl Into<PathBuf>) -> Self {
        Self {
            config: None,
            seed: None,
            threads: None,
            store: store.into(),
            force: false,
            overrides: Vec::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl std::fmt::Display) -> Self {
        self.overrides.push(format!("{key}={value}"));
        self
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Full toy benchmark: field data, surrogates, RMSE comparison, calibration.
    ToyE2e(RunArgs),
    /// Maximin Latin hypercube design.
    Design(RunArgs),
    /// Evaluate a design with the toy or an external simulator.
    Simulate(RunArgs),
    /// Build the on-site surrogate bank.
    Fit(RunArgs),
    /// Modular calibration by optimization.
    CalibrateOpt(RunArgs),
    /// Posterior sampling of the calibration parameters.
    CalibrateMcmc(RunArgs),
    /// Posterior predictive at field sites.
    Predict(RunArgs),
    /// Leave-one-out cross-validation.
    Loo(RunArgs),
    /// Toy simulator speaking the batch file protocol.
    #[command(hide = true)]
    ToyAdapter { input: PathBuf, output: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    ToyE2e,
    Design,
    Simulate,
    Fit,
    CalibrateOpt,
    CalibrateMcmc,
    Predict,
    Loo,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::ToyE2e => "toy-e2e",
            CommandKind::Design => "design",
            CommandKind::Simulate => "simulate",
            CommandKind::Fit => "fit",
            CommandKind::CalibrateOpt => "calibrate-opt",
            CommandKind::CalibrateMcmc => "calibrate-mcmc",
            CommandKind::Predict => "predict",
            CommandKind::Loo => "loo",
        }
    }
}

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::UpstreamMissing(_) => 3,
        Error::NumericalFailure { .. } | Error::InsufficientData(_) | Error::SiteStarvation { .. } => 4,
        Error::SimulatorFailure(_) | Error::Protocol(_) | Error::Missingness { .. } => 5,
        _ => 2,
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn main_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let (kind, args) = match cli.command {
        Command::ToyAdapter { input, output } => {
            return match crate::sim::toy_adapter_main(&input, &output) {
                Ok(()) => 0,
                Err(e) => {
                    eprintln!("toy-adapter: {e}");
                    5
                }
            };
        }
        Command::ToyE2e(a) => (CommandKind::ToyE2e, a),
        Command::Design(a) => (CommandKind::Design, a),
        Command::Simulate(a) => (CommandKind::Simulate, a),
        Command::Fit(a) => (CommandKind::Fit, a),
        Command::CalibrateOpt(a) => (CommandKind::CalibrateOpt, a),
        Command::CalibrateMcmc(a) => (CommandKind::CalibrateMcmc, a),
        Command::Predict(a) => (CommandKind::Predict, a),
        Command::Loo(a) => (CommandKind::Loo, a),
    };
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already initialized: {e}");
        }
    }
    match execute(kind, &args) {
        Ok(report) => {
            match report.status {
                RunStatus::UpToDate => println!(
                    "{}: up to date (config {}) in {}",
                    kind.name(),
                    &report.manifest.config_hash[..12],
                    report.dir.display()
                ),
                _ => println!("{}: complete in {}", kind.name(), report.dir.display()),
            }
            0
        }
        Err(e) => {
            eprintln!("{}: {e}", kind.name());
            exit_code(&e)
        }
    }
}

// ---------------------------------------------------------------------------
// Run store

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Complete,
    Failed,
    /// Reported only: an identical completed run was found.
    UpToDate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub name: String,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub started_unix: f64,
    pub finished_unix: Option<f64>,
    pub version: String,
    pub modules: BTreeMap<String, String>,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Paths relative to the run directory.
    pub artifacts: Vec<String>,
}

impl Manifest {
    pub fn all_artifacts_exist(&self, dir: &Path) -> bool {
        self.artifacts.iter().all(|a| dir.join(a).exists())
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub dir: PathBuf,
    pub status: RunStatus,
    pub manifest: Manifest,
}

/// Root directory holding one subdirectory per run.
#[derive(Debug, Clone)]
pub struct RunStore {
    pub root: PathBuf,
}

struct LockGuard(PathBuf);

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn now_unix() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

impl RunStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn run_dir(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Resolves a config path: absolute paths are kept, others are relative
    /// to the store root.
    pub fn resolve(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn read_manifest(&self, name: &str) -> Result<Manifest> {
        read_json(&self.run_dir(name).join("manifest.json"))
    }

    fn lock(&self, dir: &Path) -> Result<LockGuard> {
        let path = dir.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(LockGuard(path)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Config(format!(
                "run directory {} is locked by another process (remove {} if stale)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

// ---------------------------------------------------------------------------
// Config handling

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = root;
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override {key}: {part} is not inside an object")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Err(Error::Config(format!("empty override key {key:?}")))
}

/// The raw config after overrides, `--seed` last.
pub fn effective_config(args: &RunArgs) -> Result<Value> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => Value::Object(Default::default()),
    };
    if !cfg.is_object() {
        return Err(Error::Config("config must be a JSON object".into()));
    }
    for ov in &args.overrides {
        let (k, v) = ov
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {ov:?} is not key=value")))?;
        let v = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
        set_path(&mut cfg, k.trim(), v)?;
    }
    if let Some(seed) = args.seed {
        set_path(&mut cfg, "seed", Value::from(seed))?;
    }
    Ok(cfg)
}

fn typed<T: DeserializeOwned>(cfg: Value) -> Result<T> {
    serde_json::from_value(cfg).map_err(|e| Error::Config(e.to_string()))
}

fn config_hash(command: &str, effective: &Value) -> String {
    // serde_json maps are sorted, so this serialization is canonical
    let text = serde_json::to_string(&serde_json::json!({ "command": command, "config": effective }))
        .expect("json value serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Output of one command body.
struct Produced {
    artifacts: Vec<String>,
    seeds: BTreeMap<String, u64>,
}

fn seeds(pairs: &[(&str, u64)]) -> BTreeMap<String, u64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

/// Runs one command against the store in `args`.
pub fn execute(kind: CommandKind, args: &RunArgs) -> Result<RunReport> {
    let mut raw = effective_config(args)?;
    let name = match raw.as_object_mut().and_then(|m| m.remove("name")) {
        Some(Value::String(s)) if !s.is_empty() && !s.contains(['/', '\\']) && s != ".." => s,
        Some(other) => return Err(Error::Config(format!("invalid run name {other}"))),
        None => kind.name().to_string(),
    };
    let store = RunStore::new(&args.store);

    // Fill defaults before hashing so omitted and explicit defaults agree.
    let effective = match kind {
        CommandKind::ToyE2e => serde_json::to_value(typed::<ToyConfig>(raw)?)?,
        CommandKind::Design => serde_json::to_value(typed::<DesignCmd>(raw)?)?,
        CommandKind::Simulate => serde_json::to_value(typed::<SimulateCmd>(raw)?)?,
        CommandKind::Fit => serde_json::to_value(typed::<FitCmd>(raw)?)?,
        CommandKind::CalibrateOpt => serde_json::to_value(typed::<CalibrateOptCmd>(raw)?)?,
        CommandKind::CalibrateMcmc => serde_json::to_value(typed::<CalibrateMcmcCmd>(raw)?)?,
        CommandKind::Predict => serde_json::to_value(typed::<PredictCmd>(raw)?)?,
        CommandKind::Loo => serde_json::to_value(typed::<LooCmd>(raw)?)?,
    };
    let hash = config_hash(kind.name(), &effective);

    let dir = store.run_dir(&name);
    fs::create_dir_all(&dir)?;
    let _lock = store.lock(&dir)?;

    if let Ok(prev) = store.read_manifest(&name) {
        if prev.config_hash == hash && prev.status == RunStatus::Complete && prev.all_artifacts_exist(&dir) {
            if !args.force {
                log::info!("{name}: identical config hash {hash}, skipping");
                return Ok(RunReport {
                    dir,
                    status: RunStatus::UpToDate,
                    manifest: prev,
                });
            }
            log::info!("{name}: identical config hash {hash}, rerunning on request");
        }
    }
    let _ = fs::remove_file(dir.join("FAILED"));

    write_json(&dir.join("config.json"), &effective)?;
    let mut manifest = Manifest {
        command: kind.name().into(),
        name: name.clone(),
        config_hash: hash,
        seeds: BTreeMap::new(),
        started_unix: now_unix(),
        finished_unix: None,
        version: VERSION.into(),
        modules: ["design", "gp", "sim", "oss", "koh", "calib", "cli"]
            .iter()
            .map(|m| (m.to_string(), VERSION.to_string()))
            .collect(),
        status: RunStatus::Running,
        error: None,
        artifacts: vec!["config.json".into()],
    };
    write_json(&dir.join("manifest.json"), &manifest)?;

    let result = match kind {
        CommandKind::ToyE2e => cmd_toy_e2e(&typed(effective)?, &dir),
        CommandKind::Design => cmd_design(&typed(effective)?, &dir),
        CommandKind::Simulate => cmd_simulate(&typed(effective)?, &store, &dir),
        CommandKind::Fit => cmd_fit(&typed(effective)?, &store, &dir),
        CommandKind::CalibrateOpt => cmd_calibrate_opt(&typed(effective)?, &store, &dir),
        CommandKind::CalibrateMcmc => cmd_calibrate_mcmc(&typed(effective)?, &store, &dir),
        CommandKind::Predict => cmd_predict(&typed(effective)?, &store, &dir),
        CommandKind::Loo => cmd_loo(&typed(effective)?, &store, &dir),
    };
    manifest.finished_unix = Some(now_unix());
    match result {
        Ok(produced) => {
            manifest.seeds = produced.seeds;
            manifest.artifacts.extend(produced.artifacts);
            manifest.artifacts.retain(|a| dir.join(a).exists());
            manifest.status = RunStatus::Complete;
            write_json(&dir.join("manifest.json"), &manifest)?;
            Ok(RunReport {
                dir,
                status: RunStatus::Complete,
                manifest,
            })
        }
        Err(e) => {
            manifest.status = RunStatus::Failed;
            manifest.error = Some(e.to_string());
            fs::write(dir.join("FAILED"), format!("{e}\n"))?;
            write_json(&dir.join("manifest.json"), &manifest)?;
            Err(e)
        }
    }
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

// ---------------------------------------------------------------------------
// Commands

fn cmd_toy_e2e(cfg: &ToyConfig, dir: &Path) -> Result<Produced> {
    let run = run_toy(cfg)?;
    let artifacts = run.write_artifacts(dir)?;
    Ok(Produced {
        artifacts,
        seeds: seeds(&[
            ("master", cfg.seed),
            ("field", cfg.field_seed()),
            ("oss_train", derive_seed(cfg.seed, stream::OSS_TRAIN)),
            ("oss_test", cfg.test_seed()),
            ("global_train", derive_seed(cfg.seed, stream::GLOBAL_TRAIN)),
            ("modular", derive_seed(cfg.seed, stream::MODULAR)),
            ("pilot", derive_seed(cfg.seed, stream::PILOT)),
            ("mcmc", derive_seed(cfg.seed, stream::MCMC)),
        ]),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignCmd {
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    /// Swap budget; `None` uses the default for `(n, d)`.
    pub maximin_iters: Option<usize>,
    /// Plain LHS without maximin improvement.
    pub plain: bool,
}

impl Default for DesignCmd {
    fn default() -> Self {
        Self {
            seed: 1,
            n: 20,
            d: 3,
            maximin_iters: None,
            plain: false,
        }
    }
}

fn cmd_design(cfg: &DesignCmd, dir: &Path) -> Result<Produced> {
    let design = if cfg.plain {
        lhs(cfg.n, cfg.d, cfg.seed)?
    } else {
        let iters = cfg.maximin_iters.unwrap_or_else(|| default_maximin_iters(cfg.n, cfg.d));
        maximin_lhs(cfg.n, cfg.d, cfg.seed, iters)?
    };
    design.write_csv(create(&dir.join("design.csv"))?)?;
    write_json(
        &dir.join("design.json"),
        &serde_json::json!({ "n": cfg.n, "d": cfg.d, "min_distance": design.min_distance() }),
    )?;
    Ok(Produced {
        artifacts: strings(&["design.csv", "design.json"]),
        seeds: seeds(&[("design", cfg.seed)]),
    })
}

/// `"toy"` or a path to an adapter config JSON.
fn simulator(spec: &str, store: &RunStore) -> Result<Box<dyn Simulator>> {
    if spec == "toy" {
        Ok(Box::new(ToySimulator::default()))
    } else {
        Ok(Box::new(BatchAdapter::from_config_file(&store.resolve(spec))?))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateCmd {
    pub seed: u64,
    pub design: String,
    pub simulator: String,
    /// Read responses from this file instead of running anything.
    pub response_file: Option<String>,
}

impl Default for SimulateCmd {
    fn default() -> Self {
        Self {
            seed: 1,
            design: "design/design.csv".into(),
            simulator: "toy".into(),
            response_file: None,
        }
    }
}

fn cmd_simulate(cfg: &SimulateCmd, store: &RunStore, dir: &Path) -> Result<Produced> {
    let design = DesignMatrix::read_csv(open(&store.resolve(&cfg.design))?)?;
    let res = match &cfg.response_file {
        Some(p) => batch_simulate(&BatchAdapter::ResponseFile(store.resolve(p)), &design)?,
        None => simulator(&cfg.simulator, store)?.simulate(&design)?,
    };
    res.write_csv(create(&dir.join("responses.csv"))?)?;
    write_json(
        &dir.join("simulate.json"),
        &serde_json::json!({
            "n_requested": res.n_requested,
            "n_converged": res.n_converged,
            "missing_fraction": res.missing_fraction(),
        }),
    )?;
    Ok(Produced {
        artifacts: strings(&["responses.csv", "simulate.json"]),
        seeds: BTreeMap::new(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitCmd {
    pub seed: u64,
    /// Field CSV (`x1..xp,y`); `None` generates toy field data.
    pub field: Option<String>,
    pub n_field: usize,
    pub noise_sd: f64,
    pub n_per_site: usize,
    pub p_u: usize,
    pub restarts: usize,
    pub maximin_iters: Option<usize>,
    pub simulator: String,
}

impl Default for FitCmd {
    fn default() -> Self {
        let toy = ToyConfig::default();
        Self {
            seed: toy.seed,
            field: None,
            n_field: toy.n_field,
            noise_sd: toy.noise_sd,
            n_per_site: toy.n_per_site,
            p_u: ToyConfig::P_U,
            restarts: toy.onsite_restarts,
            maximin_iters: None,
            simulator: "toy".into(),
        }
    }
}

fn cmd_fit(cfg: &FitCmd, store: &RunStore, dir: &Path) -> Result<Produced> {
    // same seed derivation as the toy pipeline, so banks agree across commands
    let toy = ToyConfig {
        seed: cfg.seed,
        n_field: cfg.n_field,
        noise_sd: cfg.noise_sd,
        n_per_site: cfg.n_per_site,
        onsite_restarts: cfg.restarts,
        ..ToyConfig::default()
    };
    let field = match &cfg.field {
        Some(p) => FieldDataset::read_csv(open(&store.resolve(p))?, cfg.noise_sd)?,
        None => gen_field(cfg.n_field, cfg.noise_sd, toy.field_seed())?,
    };
    let mut bank_cfg = toy.bank_config();
    bank_cfg.p_u = cfg.p_u;
    bank_cfg.maximin_iters = cfg.maximin_iters;
    let sim = simulator(&cfg.simulator, store)?;
    let bank = build_bank(&field, sim.as_ref(), &bank_cfg)?;
    field.write_csv(create(&dir.join("field.csv"))?)?;
    bank.save(&dir.join("bank"))?;
    let mut artifacts = strings(&["field.csv", "bank/bank.json"]);
    for k in 1..=bank.len() {
        artifacts.extend([format!("bank/U_{k}.csv"), format!("bank/y_{k}.csv"), format!("bank/hp_{k}.json")]);
    }
    Ok(Produced {
        artifacts,
        seeds: seeds(&[
            ("master", cfg.seed),
            ("field", toy.field_seed()),
            ("oss_train", bank_cfg.seed),
            ("gp_fit", bank_cfg.fit.seed),
        ]),
    })
}

/// Loads the field data and bank written by `fit` into `fit_dir`.
pub fn load_fit(store: &RunStore, fit_dir: &str) -> Result<SurrogateBank> {
    let dir = store.resolve(fit_dir);
    let field = FieldDataset::read_csv(open(&dir.join("field.csv"))?, 0.0)?;
    SurrogateBank::load(&dir.join("bank"), &field)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateOptCmd {
    pub seed: u64,
    pub fit: String,
    pub prior: PriorSpec,
    pub restarts: usize,
    pub bias_restarts: usize,
}

impl Default for CalibrateOptCmd {
    fn default() -> Self {
        let toy = ToyConfig::default();
        Self {
            seed: toy.seed,
            fit: "fit".into(),
            prior: PriorSpec::Uniform,
            restarts: toy.modular_restarts,
            bias_restarts: toy.bias_restarts,
        }
    }
}

fn cmd_calibrate_opt(cfg: &CalibrateOptCmd, store: &RunStore, dir: &Path) -> Result<Produced> {
    let bank = load_fit(store, &cfg.fit)?;
    let toy = ToyConfig {
        seed: cfg.seed,
        bias_restarts: cfg.bias_restarts,
        ..ToyConfig::default()
    };
    let seed = derive_seed(cfg.seed, stream::MODULAR);
    let sols = modular_optimize(&bank, &cfg.prior, &toy.bias_fit(), cfg.restarts, seed)?;
    write_modular_csv(&dir.join("modular.csv"), &sols)?;
    let best = &sols[0];
    let rec = MapRecord {
        u_map: best.u.clone(),
        map_logpost: best.log_score,
        modular_u: best.u.clone(),
        modular_log_score: best.log_score,
        phi_b: best.phi_b.clone(),
        u_true: None,
    };
    write_json(&dir.join("map.json"), &rec)?;
    Ok(Produced {
        artifacts: strings(&["modular.csv", "map.json"]),
        seeds: seeds(&[("master", cfg.seed), ("modular", seed), ("bias_fit", toy.bias_fit().seed)]),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateMcmcCmd {
    pub seed: u64,
    pub fit: String,
    /// `map.json` supplying the bias hyperparameters and the starting point.
    pub start: String,
    pub prior: PriorSpec,
    pub t: usize,
    pub pilot_sweeps: usize,
    pub burn_in: f64,
    pub sigma: Vec<f64>,
}

impl Default for CalibrateMcmcCmd {
    fn default() -> Self {
        let toy = ToyConfig::default();
        Self {
            seed: toy.seed,
            fit: "fit".into(),
            start: "calibrate-opt/map.json".into(),
            prior: PriorSpec::Uniform,
            t: toy.mcmc_t,
            pilot_sweeps: toy.pilot_sweeps,
            burn_in: toy.burn_in,
            sigma: Vec::new(),
        }
    }
}

fn cmd_calibrate_mcmc(cfg: &CalibrateMcmcCmd, store: &RunStore, dir: &Path) -> Result<Produced> {
    let bank = load_fit(store, &cfg.fit)?;
    let start: MapRecord = read_json(&store.resolve(&cfg.start))?;
    let sigma0 = if cfg.sigma.is_empty() {
        crate::calib::default_sigma(bank.p_u)
    } else {
        cfg.sigma.clone()
    };
    let pre = JointPrecompute::new(&bank, &start.phi_b)?;
    let loglik = |u: &[f64]| pre.loglik(u);
    let pilot_seed = derive_seed(cfg.seed, stream::PILOT);
    let mcmc_seed = derive_seed(cfg.seed, stream::MCMC);
    let (sigma, u0) = if cfg.pilot_sweeps > 0 {
        tune_proposal(&loglik, &cfg.prior, &sigma0, cfg.pilot_sweeps, &start.u_map, pilot_seed)?
    } else {
        (sigma0, start.u_map.clone())
    };
    let chain = mcmc(&pre, &cfg.prior, &sigma, cfg.t, &u0, mcmc_seed)?;
    let diag = diagnostics(&chain, cfg.burn_in)?;
    chain.write_csv(create(&dir.join("posterior_samples.csv"))?)?;
    write_json(&dir.join("posterior_summary.json"), &diag)?;
    let rec = MapRecord {
        u_map: diag.map.clone(),
        map_logpost: diag.map_logpost,
        modular_u: start.modular_u.clone(),
        modular_log_score: start.modular_log_score,
        phi_b: start.phi_b.clone(),
        u_true: start.u_true.clone(),
    };
    write_json(&dir.join("map.json"), &rec)?;
    Ok(Produced {
        artifacts: strings(&["posterior_samples.csv", "posterior_summary.json", "map.json"]),
        seeds: seeds(&[("master", cfg.seed), ("pilot", pilot_seed), ("mcmc", mcmc_seed)]),
    })
}

/// Posterior draws from a chain CSV with the leading `burn_in` fraction
/// removed (at least one draw is kept).
pub fn load_chain(path: &Path, burn_in: f64) -> Result<Vec<Vec<f64>>> {
    let (samples, _) = read_chain_csv(open(path)?)?;
    if samples.is_empty() {
        return Err(Error::Parse {
            row: 0,
            message: format!("{} holds no samples", path.display()),
        });
    }
    let b = ((samples.len() as f64) * burn_in.clamp(0.0, 1.0)).floor() as usize;
    Ok(samples[b.min(samples.len() - 1)..].to_vec())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictCmd {
    pub seed: u64,
    pub fit: String,
    /// Bank at the prediction sites; `None` predicts at the training sites.
    pub new_fit: Option<String>,
    /// Supplies `φ_b` and, without a chain, the point `u`.
    pub map: String,
    /// Chain CSV for full-Bayes aggregation.
    pub chain: Option<String>,
    pub stride: usize,
    pub burn_in: f64,
    pub with_cov: bool,
}

impl Default for PredictCmd {
    fn default() -> Self {
        Self {
            seed: 1,
            fit: "fit".into(),
            new_fit: None,
            map: "calibrate-opt/map.json".into(),
            chain: None,
            stride: 10,
            burn_in: 0.2,
            with_cov: false,
        }
    }
}

fn cmd_predict(cfg: &PredictCmd, store: &RunStore, dir: &Path) -> Result<Produced> {
    let bank = load_fit(store, &cfg.fit)?;
    let new_bank = match &cfg.new_fit {
        Some(p) => load_fit(store, p)?,
        None => bank.clone(),
    };
    let map: MapRecord = read_json(&store.resolve(&cfg.map))?;
    let samples = match &cfg.chain {
        Some(p) => load_chain(&store.resolve(p), cfg.burn_in)?,
        None => vec![map.u_map.clone()],
    };
    let pre = JointPrecompute::new(&bank, &map.phi_b)?;
    let pred = predict_over_samples(&pre, &new_bank, &samples, cfg.stride)?;
    pred.write_csv(create(&dir.join("predictions.csv"))?)?;
    let mut json = pred.to_json(cfg.with_cov);
    json["observed"] = serde_json::json!(new_bank.field.y);
    write_json(&dir.join("predictions.json"), &json)?;
    Ok(Produced {
        artifacts: strings(&["predictions.csv", "predictions.json"]),
        seeds: BTreeMap::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LooKind {
    /// Plug-in `û` from the map file, bias refit per fold.
    Point,
    /// Chain draws with the map file's `φ_b`.
    FullBayes,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LooCmd {
    pub seed: u64,
    pub fit: String,
    pub map: String,
    pub chain: String,
    pub mode: LooKind,
    pub bias_restarts: usize,
    pub stride: usize,
    pub burn_in: f64,
}

impl Default for LooCmd {
    fn default() -> Self {
        Self {
            seed: 1,
            fit: "fit".into(),
            map: "calibrate-mcmc/map.json".into(),
            chain: "calibrate-mcmc/posterior_samples.csv".into(),
            mode: LooKind::FullBayes,
            bias_restarts: ToyConfig::default().bias_restarts,
            stride: 10,
            burn_in: 0.2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageReport {
    pub nominal: f64,
    pub coverage: f64,
    pub n_sites: usize,
    pub loo_rmse: f64,
    pub in_sample_rmse: f64,
}

fn cmd_loo(cfg: &LooCmd, store: &RunStore, dir: &Path) -> Result<Produced> {
    let bank = load_fit(store, &cfg.fit)?;
    let map: MapRecord = read_json(&store.resolve(&cfg.map))?;
    let bias_fit = ToyConfig {
        seed: cfg.seed,
        bias_restarts: cfg.bias_restarts,
        ..ToyConfig::default()
    }
    .bias_fit();
    let samples;
    let mode = match cfg.mode {
        LooKind::Point => LooMode::Point {
            u: &map.u_map,
            bias_fit: &bias_fit,
        },
        LooKind::FullBayes => {
            samples = load_chain(&store.resolve(&cfg.chain), cfg.burn_in)?;
            LooMode::FullBayes {
                samples: &samples,
                phi_b: &map.phi_b,
                stride: cfg.stride,
            }
        }
    };
    let loo = loo_predict(&bank, mode)?;
    let within = in_sample_predict(&bank, mode)?;

    let mut wr = csv::Writer::from_writer(create(&dir.join("loo.csv"))?);
    wr.write_record(["site", "observed", "predicted", "sd", "inside_95"])?;
    for i in 0..loo.observed.len() {
        let inside = (loo.observed[i] - loo.predicted[i]).abs() <= 1.96 * loo.sd[i];
        wr.write_record([
            (i + 1).to_string(),
            fmt_f64(loo.observed[i]),
            fmt_f64(loo.predicted[i]),
            fmt_f64(loo.sd[i]),
            u8::from(inside).to_string(),
        ])?;
    }
    wr.flush()?;
    drop(wr);
    let report = CoverageReport {
        nominal: 0.95,
        coverage: loo.coverage,
        n_sites: loo.observed.len(),
        loo_rmse: loo.rmse,
        in_sample_rmse: within.rmse,
    };
    write_json(&dir.join("coverage.json"), &report)?;
    Ok(Produced {
        artifacts: strings(&["loo.csv", "coverage.json"]),
        seeds: seeds(&[("bias_fit", bias_fit.seed)]),
    })
}
