//! Leave-one-out validation of the calibrated toy model, with a refit bias
//! GP at the modular estimate and with fully Bayesian prediction over the
//! posterior chain.
//!
//! ```text
//! cargo run --release --example loo_validation [seed]
//! ```

use osscal::koh::{in_sample_predict, loo_predict, LooMode};
use osscal::pipeline::{run_toy, ToyConfig};

fn main() -> osscal::Result<()> {
    let seed = std::env::args().nth(1).map_or(1, |s| s.parse().expect("seed must be an integer"));
    let cfg = ToyConfig {
        seed,
        skip_global: true,
        ..Default::default()
    };
    let run = run_toy(&cfg)?;
    let best = &run.modular[0];
    let samples = run.chain.after_burn_in(cfg.burn_in).samples;

    let bias_fit = cfg.bias_fit();
    let point = LooMode::Point {
        u: &best.u,
        bias_fit: &bias_fit,
    };
    let bayes = LooMode::FullBayes {
        samples: &samples,
        phi_b: &best.phi_b,
        stride: 20,
    };
    for (name, mode) in [("modular/opt", point), ("full Bayes", bayes)] {
        let loo = loo_predict(&run.bank, mode)?;
        let ins = in_sample_predict(&run.bank, mode)?;
        println!(
            "{name:>12}: LOO RMSE {:.5} (coverage {:.0}%), in-sample RMSE {:.5}",
            loo.rmse,
            100.0 * loo.coverage,
            ins.rmse
        );
        for i in 0..loo.observed.len() {
            println!(
                "    site {:>2}: y {:>9.5}  loo {:>9.5} ± {:.5}",
                i + 1,
                loo.observed[i],
                loo.predicted[i],
                1.96 * loo.sd[i]
            );
        }
    }
    Ok(())
}
