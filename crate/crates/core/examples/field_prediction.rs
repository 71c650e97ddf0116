//! Posterior prediction of the real process at new field sites: plug-in
//! prediction at the modular estimate versus aggregation over posterior
//! draws, both scored against the known toy truth.
//!
//! ```text
//! cargo run --release --example field_prediction [seed]
//! ```

use osscal::calib::{mcmc, modular_optimize, tune_proposal};
use osscal::koh::{posterior_predict, predict_over_samples, JointPrecompute};
use osscal::oss::{build_bank, BankConfig};
use osscal::pipeline::ToyConfig;
use osscal::seeds::{derive_seed, stream};
use osscal::sim::{gen_field, true_process, ToySimulator};

fn main() -> osscal::Result<()> {
    let seed = std::env::args().nth(1).map_or(1, |s| s.parse().expect("seed must be an integer"));
    let cfg = ToyConfig {
        seed,
        modular_restarts: 30,
        ..Default::default()
    };
    let sim = ToySimulator::default();
    let field = gen_field(cfg.n_field, cfg.noise_sd, cfg.field_seed())?;
    let bank = build_bank(&field, &sim, &cfg.bank_config())?;

    // new sites get their own on-site surrogates
    let new_field = gen_field(6, cfg.noise_sd, derive_seed(seed, 100))?;
    let new_bank = build_bank(&new_field, &sim, &BankConfig::new(cfg.n_per_site, 2, derive_seed(seed, 101)))?;

    let best = &modular_optimize(&bank, &cfg.prior, &cfg.bias_fit(), cfg.modular_restarts, derive_seed(seed, stream::MODULAR))?[0];
    let pre = JointPrecompute::new(&bank, &best.phi_b)?;
    println!("modular estimate u = ({:.4}, {:.4})", best.u[0], best.u[1]);
    let loglik = |u: &[f64]| pre.loglik(u);
    let (sigma, start) = tune_proposal(&loglik, &cfg.prior, &cfg.sigma0(), 1000, &best.u, derive_seed(seed, stream::PILOT))?;
    let chain = mcmc(&pre, &cfg.prior, &sigma, 3000, &start, derive_seed(seed, stream::MCMC))?;
    let draws = chain.after_burn_in(cfg.burn_in).samples;

    let point = posterior_predict(&pre, &new_bank, &best.u)?;
    let bayes = predict_over_samples(&pre, &new_bank, &draws, 10)?;
    println!("      x    truth   point mean ± 1.96 sd     full-Bayes mean ± 1.96 sd");
    for i in 0..new_bank.len() {
        let x = new_field.site(i)[0];
        println!(
            "{x:>7.3} {:>8.4}   {:>9.4} ± {:<8.4}   {:>9.4} ± {:<8.4}",
            true_process(x),
            point.mean[i],
            1.96 * point.sd()[i],
            bayes.mean[i],
            1.96 * bayes.sd()[i]
        );
    }
    println!("provenance of the aggregate: {:?}", bayes.provenance);
    Ok(())
}
