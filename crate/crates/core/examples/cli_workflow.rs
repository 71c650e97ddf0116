//! The command pipeline driven in-process against a run store: fit a bank,
//! calibrate, sample, predict and cross-validate, then show that an
//! identical rerun is detected. Same as calling the `osscal` binary with
//! `--store <dir>` and `key=value` overrides.
//!
//! ```text
//! cargo run --release --example cli_workflow [store-dir]
//! ```

use osscal::cli::{execute, CommandKind, CoverageReport, RunArgs};

fn main() -> osscal::Result<()> {
    let store = std::env::args().nth(1).unwrap_or_else(|| "osscal-store".into());
    let args = || RunArgs::new(&store);

    let steps = [
        (CommandKind::Fit, args().with("n_per_site", 60)),
        (CommandKind::CalibrateOpt, args().with("restarts", 10)),
        (CommandKind::CalibrateMcmc, args().with("t", 3000).with("pilot_sweeps", 500)),
        (
            CommandKind::Predict,
            args()
                .with("map", "calibrate-mcmc/map.json")
                .with("chain", "calibrate-mcmc/posterior_samples.csv"),
        ),
        (CommandKind::Loo, args()),
    ];
    for (kind, a) in &steps {
        let report = execute(*kind, a)?;
        println!(
            "{:<15} {:?}, config {}, {} artifacts",
            kind.name(),
            report.status,
            &report.manifest.config_hash[..12],
            report.manifest.artifacts.len()
        );
    }

    let cov: CoverageReport = serde_json::from_reader(std::fs::File::open(format!("{store}/loo/coverage.json"))?)?;
    println!(
        "\nLOO coverage {:.0}% over {} sites, RMSE {:.4} (in-sample {:.4})",
        100.0 * cov.coverage,
        cov.n_sites,
        cov.loo_rmse,
        cov.in_sample_rmse
    );

    let again = execute(CommandKind::Fit, &steps[0].1)?;
    println!("rerunning fit with the same config: {:?}", again.status);
    Ok(())
}
