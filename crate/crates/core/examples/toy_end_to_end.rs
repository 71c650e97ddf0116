//! The full toy benchmark: surrogates, RMSE comparison, modular calibration
//! and posterior sampling, with every artifact written to a directory.
//!
//! ```text
//! cargo run --release --example toy_end_to_end [seed] [out_dir]
//! ```

use std::path::PathBuf;

use osscal::pipeline::{run_toy, ToyConfig};

fn main() -> osscal::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let seed = args.next().map_or(1, |s| s.parse().expect("seed must be an integer"));
    let out = args.next().map_or_else(|| PathBuf::from("toy_run"), PathBuf::from);

    let cfg = ToyConfig { seed, ..Default::default() };
    let run = run_toy(&cfg)?;
    run.write_artifacts(&out)?;

    let s = run.summary();
    let d = &run.diagnostics;
    println!("artifacts in {}", out.display());
    println!(
        "missing: on-site {:.2}%, global {:.2}%",
        100.0 * s.oss_missing_fraction,
        100.0 * s.global_missing_fraction.unwrap_or(f64::NAN)
    );
    println!(
        "median RMSE: on-site {:.5}, global {:.5}",
        s.oss_rmse_median,
        s.global_rmse_median.unwrap_or(f64::NAN)
    );
    println!("modular u_hat: {:?}", run.modular[0].u);
    println!("MCMC MAP:      {:?}", d.map);
    println!("posterior mean {:?} sd {:?}", d.posterior_mean, d.posterior_sd);
    println!("acceptance {:?}, ESS {:?}", d.acceptance, d.ess);
    println!("timing: {:?}", run.timing);
    Ok(())
}
