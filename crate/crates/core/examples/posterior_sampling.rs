//! Modular calibration followed by Metropolis-within-Gibbs sampling of the
//! calibration parameters on a reduced toy problem, with chain diagnostics.
//!
//! ```text
//! cargo run --release --example posterior_sampling [seed]
//! ```

use osscal::calib::{diagnostics, mcmc, modular_optimize, tune_proposal, PriorSpec};
use osscal::koh::JointPrecompute;
use osscal::oss::build_bank;
use osscal::pipeline::ToyConfig;
use osscal::seeds::{derive_seed, stream};
use osscal::sim::{gen_field, ToySimulator};

fn main() -> osscal::Result<()> {
    let seed = std::env::args().nth(1).map_or(1, |s| s.parse().expect("seed must be an integer"));
    let cfg = ToyConfig {
        seed,
        modular_restarts: 30,
        mcmc_t: 4000,
        prior: PriorSpec::beta(2.0, 2.0)?,
        ..Default::default()
    };
    let field = gen_field(cfg.n_field, cfg.noise_sd, cfg.field_seed())?;
    let bank = build_bank(&field, &ToySimulator::default(), &cfg.bank_config())?;

    let sols = modular_optimize(&bank, &cfg.prior, &cfg.bias_fit(), cfg.modular_restarts, derive_seed(seed, stream::MODULAR))?;
    println!("modular restarts (best first):");
    for s in sols.iter().take(5) {
        println!("  u = ({:.4}, {:.4})  log score {:.3}", s.u[0], s.u[1], s.log_score);
    }

    let best = &sols[0];
    let pre = JointPrecompute::new(&bank, &best.phi_b)?;
    let loglik = |u: &[f64]| pre.loglik(u);
    let (sigma, start) = tune_proposal(&loglik, &cfg.prior, &cfg.sigma0(), cfg.pilot_sweeps, &best.u, derive_seed(seed, stream::PILOT))?;
    let chain = mcmc(&pre, &cfg.prior, &sigma, cfg.mcmc_t, &start, derive_seed(seed, stream::MCMC))?;
    let diag = diagnostics(&chain, cfg.burn_in)?;

    println!("\nchain: T = {}, burn-in {}, tuned sigma ({:.4}, {:.4})", diag.t, diag.burn_in, sigma[0], sigma[1]);
    for j in 0..2 {
        println!(
            "  u{}: mean {:.4}  sd {:.4}  ESS {:.0}  acceptance {:.2}",
            j + 1,
            diag.posterior_mean[j],
            diag.posterior_sd[j],
            diag.ess[j],
            diag.acceptance[j]
        );
    }
    println!("  MAP ({:.4}, {:.4}); truth (0.8, 0.2)", diag.map[0], diag.map[1]);
    Ok(())
}
